#pragma once

#include "canids/error.hpp"
#include "canids/rng.hpp"
#include "canids/can_frame.hpp"
#include "canids/dataset.hpp"
#include "canids/window.hpp"
#include "canids/tensor.hpp"
#include "canids/layers.hpp"
#include "canids/model.hpp"
#include "canids/optim.hpp"
#include "canids/train.hpp"
#include "canids/serialize.hpp"
#include "canids/model_io.hpp"
#include "canids/quant.hpp"
#include "canids/detector.hpp"
#include "canids/metrics.hpp"
#include "canids/replay.hpp"
