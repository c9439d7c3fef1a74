#pragma once

#include "tijepa/checkpoint.hpp"
#include "tijepa/config.hpp"
#include "tijepa/dataprep.hpp"
#include "tijepa/encoders.hpp"
#include "tijepa/errors.hpp"
#include "tijepa/eval_head.hpp"
#include "tijepa/gradcheck.hpp"
#include "tijepa/gradient_suite.hpp"
#include "tijepa/image_io.hpp"
#include "tijepa/layers.hpp"
#include "tijepa/log.hpp"
#include "tijepa/masking.hpp"
#include "tijepa/model.hpp"
#include "tijepa/ops.hpp"
#include "tijepa/optim.hpp"
#include "tijepa/pipeline.hpp"
#include "tijepa/rng.hpp"
#include "tijepa/tensor.hpp"
#include "tijepa/trainer.hpp"
