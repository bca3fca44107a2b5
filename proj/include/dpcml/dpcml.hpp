#pragma once

#include "dpcml/checkpoint.hpp"
#include "dpcml/config.hpp"
#include "dpcml/data.hpp"
#include "dpcml/embedding.hpp"
#include "dpcml/error.hpp"
#include "dpcml/eval.hpp"
#include "dpcml/objective.hpp"
#include "dpcml/sampling.hpp"
#include "dpcml/trainer.hpp"
