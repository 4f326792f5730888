#pragma once

// Umbrella header.

#include "wetsam/checkpoint.hpp"
#include "wetsam/config.hpp"
#include "wetsam/data/compositing.hpp"
#include "wetsam/data/cube.hpp"
#include "wetsam/data/io.hpp"
#include "wetsam/encoder.hpp"
#include "wetsam/errors.hpp"
#include "wetsam/grad_check.hpp"
#include "wetsam/losses.hpp"
#include "wetsam/metrics.hpp"
#include "wetsam/model.hpp"
#include "wetsam/optimizer.hpp"
#include "wetsam/prompt_decoder.hpp"
#include "wetsam/region_grow.hpp"
#include "wetsam/synthetic.hpp"
#include "wetsam/temporal.hpp"
#include "wetsam/tensor.hpp"
#include "wetsam/trainer.hpp"
#include "wetsam/version.hpp"
