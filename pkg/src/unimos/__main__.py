from .eval_cli import main

main()
