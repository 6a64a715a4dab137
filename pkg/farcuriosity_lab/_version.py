"""Static version information of the package."""

import json

version_json = """
{
 "date": "2026-10-18T00:00:00+0000",
 "dirty": false,
 "error": null,
 "full-revisionid": null,
 "version": "0.1.0"
}
"""


def get_versions():
    """Return the version record of the installed package."""
    return json.loads(version_json)
