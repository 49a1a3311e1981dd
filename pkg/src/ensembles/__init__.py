# ensembles package
