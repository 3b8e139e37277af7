"""Built-in task templates, shipped as JSON data files.

Templates are data, not code: new tasks need a new file, not a rebuild.
"""
