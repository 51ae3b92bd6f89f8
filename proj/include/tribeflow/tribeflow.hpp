#pragma once

#include "tribeflow/adapt.hpp"
#include "tribeflow/baselines.hpp"
#include "tribeflow/common.hpp"
#include "tribeflow/corpus.hpp"
#include "tribeflow/eval.hpp"
#include "tribeflow/io.hpp"
#include "tribeflow/parallel.hpp"
#include "tribeflow/predict.hpp"
#include "tribeflow/residence.hpp"
#include "tribeflow/sampler.hpp"
#include "tribeflow/state.hpp"
#include "tribeflow/synth.hpp"
#include "tribeflow/windows.hpp"
