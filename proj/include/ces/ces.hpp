#pragma once

// Umbrella header for the calibrate-emulate-sample library.

#include "ces/calibration.hpp"
#include "ces/config.hpp"
#include "ces/core.hpp"
#include "ces/darcy.hpp"
#include "ces/diagnostics.hpp"
#include "ces/dynamics.hpp"
#include "ces/emulator.hpp"
#include "ces/gamma_prior.hpp"
#include "ces/gp.hpp"
#include "ces/io.hpp"
#include "ces/kernel.hpp"
#include "ces/kl_field.hpp"
#include "ces/linear_model.hpp"
#include "ces/mcmc.hpp"
#include "ces/misfit.hpp"
#include "ces/pipeline.hpp"
#include "ces/serialize.hpp"
#include "ces/setup.hpp"
#include "ces/transform.hpp"
