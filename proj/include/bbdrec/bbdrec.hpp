#pragma once

#include "bbdrec/bridge_diffusion.hpp"
#include "bbdrec/bridge_schedule.hpp"
#include "bbdrec/checkpoint.hpp"
#include "bbdrec/config.hpp"
#include "bbdrec/data.hpp"
#include "bbdrec/denoiser.hpp"
#include "bbdrec/inference.hpp"
#include "bbdrec/model.hpp"
#include "bbdrec/nn.hpp"
#include "bbdrec/objective.hpp"
#include "bbdrec/optimizer.hpp"
#include "bbdrec/params.hpp"
#include "bbdrec/seq_encoder.hpp"
#include "bbdrec/tensor.hpp"
#include "bbdrec/trainer.hpp"
#include "bbdrec/verify.hpp"
