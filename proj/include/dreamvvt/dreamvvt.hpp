#pragma once

#include "dreamvvt/autograd.hpp"
#include "dreamvvt/caption.hpp"
#include "dreamvvt/checkpoint.hpp"
#include "dreamvvt/codec.hpp"
#include "dreamvvt/conditioning.hpp"
#include "dreamvvt/diffusion.hpp"
#include "dreamvvt/dit.hpp"
#include "dreamvvt/fusion.hpp"
#include "dreamvvt/image_io.hpp"
#include "dreamvvt/keyframes.hpp"
#include "dreamvvt/metrics.hpp"
#include "dreamvvt/pipeline.hpp"
#include "dreamvvt/pose.hpp"
#include "dreamvvt/raster.hpp"
#include "dreamvvt/rng.hpp"
