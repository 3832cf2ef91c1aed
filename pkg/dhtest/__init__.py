from .dhtest import *
