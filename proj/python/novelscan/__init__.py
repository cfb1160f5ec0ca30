from ._novelscan import *  # noqa: F401,F403
from ._novelscan import Error, __doc__  # noqa: F401
