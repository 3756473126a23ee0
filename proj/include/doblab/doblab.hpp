#pragma once

#include "doblab/core_model.hpp"
#include "doblab/format.hpp"
#include "doblab/harness.hpp"
#include "doblab/imm.hpp"
#include "doblab/kalman.hpp"
#include "doblab/kf_dob.hpp"
#include "doblab/mkc.hpp"
#include "doblab/oracles.hpp"
#include "doblab/random_models.hpp"
#include "doblab/scenario.hpp"
#include "doblab/sise.hpp"
