#pragma once

#include "ooc/common.hpp"
#include "ooc/manifest.hpp"
#include "ooc/prompt.hpp"
#include "ooc/encoders.hpp"
#include "ooc/model.hpp"
#include "ooc/checkpoint.hpp"
#include "ooc/trainer.hpp"
#include "ooc/extractor.hpp"
#include "ooc/evaluator.hpp"
#include "ooc/chat_backend.hpp"
#include "ooc/run_config.hpp"
#include "ooc/synthetic.hpp"
#include "ooc/pipeline.hpp"
