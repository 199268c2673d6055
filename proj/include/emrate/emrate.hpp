#pragma once

#include "emrate/dataset_io.hpp"
#include "emrate/em.hpp"
#include "emrate/errors.hpp"
#include "emrate/experiments.hpp"
#include "emrate/manifest.hpp"
#include "emrate/model.hpp"
#include "emrate/oracle.hpp"
#include "emrate/random.hpp"
#include "emrate/rates.hpp"
#include "emrate/stats.hpp"
