from fisherattitude.main import main

main()
