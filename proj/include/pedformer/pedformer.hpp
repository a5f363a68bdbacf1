#pragma once

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "gradcheck.hpp"
#include "gradcheck_suite.hpp"
#include "layers.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "model_config.hpp"
#include "objectives.hpp"
#include "ops.hpp"
#include "optim.hpp"
#include "plot.hpp"
#include "saim.hpp"
#include "semantic_map.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
