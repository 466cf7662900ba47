# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Allow ``python -m neuroquant``."""
from neuroquant.cli import main

if __name__ == "__main__":
    main()
