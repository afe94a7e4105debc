# Assumption audit package for delay_kolmogorov
