# Occupation measure package for delay_kolmogorov
