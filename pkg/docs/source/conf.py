#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# tempoproj documentation build configuration file
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys
sys.path.insert(0, os.path.abspath('../../'))

# -- General configuration ------------------------------------------------

extensions = ['sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon']


templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'tempoproj'
copyright = '2019, White Lab'
author = 'White Lab'

# The short X.Y version.
version = '0.1'
# The full version, including alpha/beta/rc tags.
release = '0.1.0'

language = 'en'
exclude_patterns = []
pygments_style = 'sphinx'
todo_include_todos = False

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_static_path = []
htmlhelp_basename = 'tempoprojdoc'

# -- Options for LaTeX output ---------------------------------------------

latex_documents = [
    (master_doc, 'tempoproj.tex', 'tempoproj Documentation',
     author, 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'tempoproj', 'tempoproj Documentation',
     [author], 1)
]
