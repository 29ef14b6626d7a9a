#pragma once

#include "gfn/autodiff.hpp"
#include "gfn/checkpoint.hpp"
#include "gfn/dataset.hpp"
#include "gfn/derive.hpp"
#include "gfn/errors.hpp"
#include "gfn/evaluate.hpp"
#include "gfn/hazesim.hpp"
#include "gfn/image.hpp"
#include "gfn/io.hpp"
#include "gfn/metrics.hpp"
#include "gfn/network.hpp"
#include "gfn/tensor.hpp"
#include "gfn/train.hpp"
#include "gfn/trainer.hpp"
