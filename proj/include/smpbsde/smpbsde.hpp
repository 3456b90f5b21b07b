#ifndef SMPBSDE_SMPBSDE_HPP
#define SMPBSDE_SMPBSDE_HPP

#include "smpbsde/config.hpp"
#include "smpbsde/dp_baseline.hpp"
#include "smpbsde/errors.hpp"
#include "smpbsde/experiment.hpp"
#include "smpbsde/lq_problem.hpp"
#include "smpbsde/metrics.hpp"
#include "smpbsde/nn.hpp"
#include "smpbsde/paths.hpp"
#include "smpbsde/riccati.hpp"
#include "smpbsde/rng.hpp"
#include "smpbsde/trainer.hpp"

#endif  // SMPBSDE_SMPBSDE_HPP
