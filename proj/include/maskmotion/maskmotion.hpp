#pragma once

#include "maskmotion/attention.hpp"
#include "maskmotion/checkpoint.hpp"
#include "maskmotion/codec.hpp"
#include "maskmotion/dataio.hpp"
#include "maskmotion/denoiser.hpp"
#include "maskmotion/diffusion.hpp"
#include "maskmotion/error.hpp"
#include "maskmotion/image.hpp"
#include "maskmotion/log.hpp"
#include "maskmotion/metrics.hpp"
#include "maskmotion/pipeline.hpp"
#include "maskmotion/pnm.hpp"
#include "maskmotion/prompt.hpp"
#include "maskmotion/rng.hpp"
#include "maskmotion/scene.hpp"
#include "maskmotion/tensor.hpp"
#include "maskmotion/trainer.hpp"
