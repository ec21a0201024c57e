#ifndef GSC_GSC_HPP
#define GSC_GSC_HPP

#include "gsc/approx.hpp"
#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/io.hpp"
#include "gsc/metrics.hpp"
#include "gsc/numcore.hpp"
#include "gsc/parallel.hpp"
#include "gsc/pipeline.hpp"
#include "gsc/rng.hpp"
#include "gsc/scoring.hpp"
#include "gsc/shortcircuit.hpp"
#include "gsc/synth.hpp"

#endif  // GSC_GSC_HPP
