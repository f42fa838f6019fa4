# Sphinx-Konfiguration für die Projektdokumentation.
# Bauen mit: sphinx-build -b html docs docs/_build

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

# -- Projektinformationen ----------------------------------------------------
project = 'nebula_variational_coding'
author = 'NVC-Team'
copyright = '2026, NVC-Team'
release = '1.0'
language = 'de'

# -- Erweiterungen -----------------------------------------------------------
extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
    'sphinx.ext.mathjax',
    'sphinx_design',
]

# Docstrings im reST-Stil (:param:, :rtype:), Quelltext-Reihenfolge beibehalten
autodoc_member_order = 'bysource'
autodoc_default_options = {
    'members': True,
    'show-inheritance': True,
}
napoleon_numpy_docstring = False

exclude_patterns = ['_build']

# -- HTML-Output -------------------------------------------------------------
html_theme = 'pydata_sphinx_theme'
html_title = 'Nebula Variational Coding'
html_theme_options = {
    "navbar_end": ["theme-switcher"],
    "secondary_sidebar_items": ["page-toc"],
    "show_nav_level": 2,
}
