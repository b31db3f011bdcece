# -*- coding: utf-8 -*-
from __future__ import absolute_import
import sys

from tabopt.tabopt_CLI import main

sys.exit(main())
