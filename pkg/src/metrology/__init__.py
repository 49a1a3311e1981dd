# metrology package
