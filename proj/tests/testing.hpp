#pragma once

// torch's logging header defines CHECK; doctest's must win inside tests.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
