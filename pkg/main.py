import sys
import warnings

# Suppress warnings
warnings.filterwarnings("ignore", category=FutureWarning)
warnings.filterwarnings("ignore", category=UserWarning)

from app.core.config import configure_torch, settings
from app.core.logging import setup_logging
from app.main import dispatch

if __name__ == "__main__":
    setup_logging(settings.log_file, settings.log_level)
    configure_torch()
    sys.exit(dispatch(sys.argv[1:]))
