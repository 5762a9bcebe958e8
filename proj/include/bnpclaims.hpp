#pragma once

#include "bnpclaims/errors.hpp"
#include "bnpclaims/linalg.hpp"
#include "bnpclaims/random.hpp"
#include "bnpclaims/model.hpp"
#include "bnpclaims/likelihoods.hpp"
#include "bnpclaims/sampler.hpp"
#include "bnpclaims/serialization.hpp"
#include "bnpclaims/predictive.hpp"
#include "bnpclaims/analysis.hpp"
#include "bnpclaims/data_io.hpp"
#include "bnpclaims/parallel.hpp"
