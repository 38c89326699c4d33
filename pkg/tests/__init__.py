# Tests package for barrier-hom
