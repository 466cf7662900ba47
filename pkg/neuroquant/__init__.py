# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Neural quantizers trained through an unrolled sum-product LDPC decoder."""
