#pragma once

#include "glosstr/augment.hpp"
#include "glosstr/checkpoint.hpp"
#include "glosstr/config.hpp"
#include "glosstr/corpus.hpp"
#include "glosstr/decode.hpp"
#include "glosstr/embeddings.hpp"
#include "glosstr/engine.hpp"
#include "glosstr/errors.hpp"
#include "glosstr/gradcheck.hpp"
#include "glosstr/layers.hpp"
#include "glosstr/metrics.hpp"
#include "glosstr/model.hpp"
#include "glosstr/sals.hpp"
#include "glosstr/synthetic.hpp"
#include "glosstr/text.hpp"
#include "glosstr/tokenizer.hpp"
