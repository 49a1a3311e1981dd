# gge package
