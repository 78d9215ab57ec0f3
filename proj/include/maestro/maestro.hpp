#pragma once

// Umbrella include for the whole library.

#include "maestro/array.hpp"
#include "maestro/checkpoint.hpp"
#include "maestro/common.hpp"
#include "maestro/config.hpp"
#include "maestro/corpus.hpp"
#include "maestro/ema.hpp"
#include "maestro/eval.hpp"
#include "maestro/fdcheck.hpp"
#include "maestro/grad_check.hpp"
#include "maestro/masking.hpp"
#include "maestro/model.hpp"
#include "maestro/objectives.hpp"
#include "maestro/ops.hpp"
#include "maestro/optimizer.hpp"
#include "maestro/resample.hpp"
#include "maestro/rng.hpp"
#include "maestro/tape.hpp"
#include "maestro/trainer.hpp"
#include "maestro/transducer.hpp"
