# Regime classification package for delay_kolmogorov
