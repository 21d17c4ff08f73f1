# Configuration file for the Sphinx documentation builder.
#
# This file only contains a selection of the most common options. For a full
# list see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Path setup --------------------------------------------------------------

import os
import sys
sys.path.insert(0, os.path.abspath('..'))


# -- Project information -----------------------------------------------------

project = 'lindistill'
copyright = '2024, the lindistill authors'
author = 'the lindistill authors'


# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.mathjax',
]

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

autodoc_member_order = 'bysource'


# -- Options for HTML output -------------------------------------------------

html_theme = 'furo'
html_title = project
html_theme_options = {
    'announcement': 'lindistill is research software subject to change.',
}


# Module name hacks so that aliases work correctly in autodoc
import lindistill
import lindistill.config
import lindistill.error

for name in ('ContractError', 'DomainError', 'FormatError',
             'MissingDataError', 'NumericError', 'SingularityError',
             'StepSizeError', 'UsageError'):
    getattr(lindistill.error, name).__module__ = lindistill.__name__
lindistill.config.Config.__module__ = lindistill.__name__
