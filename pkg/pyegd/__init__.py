from .errors import *
from .config import *
from .logs import *
from .gestures import *
from .kinematics import *
from .dataset import *
from .synthetic import *
from .preprocess import *
from .ops import *
from .layers import *
from .optim import *
from .gradcheck import *
from .networks import *
from .training import *
from .checkpoint import *
from .setups import *
from .metrics import *
from .experiment import *
from .kld import *
from .bench import *
from .monitor import *

__version__ = VERSION
