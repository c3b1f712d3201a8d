from mmwpos.harness.cli import main

main()
