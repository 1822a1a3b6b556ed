from calldetect.cli import main

raise SystemExit(main())
