# meanforce package
