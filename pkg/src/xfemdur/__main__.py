from .io import main

main()
