# CLI package for delay_kolmogorov
