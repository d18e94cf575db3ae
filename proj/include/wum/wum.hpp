#pragma once

#include "wum/audio.hpp"
#include "wum/checkpoint.hpp"
#include "wum/config.hpp"
#include "wum/data.hpp"
#include "wum/discriminator.hpp"
#include "wum/dsp/chebyshev.hpp"
#include "wum/dsp/degrade.hpp"
#include "wum/dsp/resample.hpp"
#include "wum/dsp/spectral.hpp"
#include "wum/errors.hpp"
#include "wum/eval.hpp"
#include "wum/generator.hpp"
#include "wum/losses.hpp"
#include "wum/ssm/mamba.hpp"
#include "wum/ssm/selective_scan.hpp"
#include "wum/train.hpp"
