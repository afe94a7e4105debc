# Model package for delay_kolmogorov
