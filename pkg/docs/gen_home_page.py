"""
Builds index.md from README.md, dropping the pointer to these docs and the
local development section.
"""

from pathlib import Path

import mkdocs_gen_files

readme_path = Path("README.md")
docs_index_path = Path("index.md")

with open(readme_path, "r") as readme:
    lines = readme.readlines()

with mkdocs_gen_files.open(docs_index_path, "w") as generated_file:
    skipping = False
    for line in lines:
        if line.startswith("## "):
            skipping = line.strip() == "## Development"
        if skipping or line.startswith("Visit the full docs [here]("):
            continue
        generated_file.write(line)

mkdocs_gen_files.set_edit_path(docs_index_path, readme_path)
