#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# tabopt documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

# -- Path setup ----------------------------------------------------------

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

import tabopt


# -- General configuration -----------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',
    'sphinx.ext.todo']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

# General information about the project.
project = 'tabopt'
copyright = u'2026, the tabopt developers'
author = u'The tabopt developers'

# The short X.Y version.
version = '.'.join(tabopt.__version__.split('.')[:2])
# The full version, including alpha/beta/rc tags.
release = tabopt.__version__

language = 'en'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = False


# -- Options for HTML output ---------------------------------------------

html_theme = 'alabaster'
html_theme_options = {
  'show_related': True
}
html_static_path = ['_static']
html_sidebars = {
    '**': [
        'relations.html',  # needs 'show_related': True theme option to display
        'searchbox.html',
    ]
}
htmlhelp_basename = 'taboptdoc'


# -- Options for LaTeX output --------------------------------------------

latex_elements = {}
latex_documents = [
    (master_doc, 'tabopt.tex', 'tabopt Documentation',
     author, 'manual'),
]


# -- Options for manual page output --------------------------------------

man_pages = [
    (master_doc, 'tabopt', 'tabopt Documentation',
     [author], 1)
]


# -- Options for Texinfo output ------------------------------------------

texinfo_documents = [
    (master_doc, 'tabopt', 'tabopt Documentation',
     author, 'tabopt', 'Optimizer benchmark for tabular deep learning.',
     'Miscellaneous'),
]
