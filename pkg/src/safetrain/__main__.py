import sys

from safetrain.pipeline.cli import main

sys.exit(main())
