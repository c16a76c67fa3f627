# Core numerics: kernels, models, filters, oracle
