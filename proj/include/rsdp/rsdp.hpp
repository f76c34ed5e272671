#pragma once

// Umbrella header for the robust low-rank SDP solver library.

#include "rsdp/admm.hpp"
#include "rsdp/apg.hpp"
#include "rsdp/applications.hpp"
#include "rsdp/experiment.hpp"
#include "rsdp/problem.hpp"
#include "rsdp/random.hpp"
#include "rsdp/serialize.hpp"
#include "rsdp/solver.hpp"
#include "rsdp/surrogate.hpp"
#include "rsdp/synthetic.hpp"
#include "rsdp/types.hpp"
