# Invasion rate package for delay_kolmogorov
