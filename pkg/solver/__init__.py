# Conic solver module
