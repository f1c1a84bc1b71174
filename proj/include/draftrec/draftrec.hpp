#pragma once

#include "draftrec/autodiff.hpp"
#include "draftrec/checkpoint.hpp"
#include "draftrec/config.hpp"
#include "draftrec/draft_state.hpp"
#include "draftrec/error.hpp"
#include "draftrec/eval.hpp"
#include "draftrec/match_data.hpp"
#include "draftrec/model.hpp"
#include "draftrec/optim.hpp"
#include "draftrec/recommender.hpp"
#include "draftrec/rng.hpp"
#include "draftrec/service.hpp"
#include "draftrec/synthetic.hpp"
#include "draftrec/tensor.hpp"
#include "draftrec/trainer.hpp"
#include "draftrec/transformer.hpp"
