# Utility package for delay_kolmogorov
