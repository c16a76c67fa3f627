# User Interface package
