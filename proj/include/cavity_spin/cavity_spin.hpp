#pragma once

#include "cavity_spin/body.hpp"
#include "cavity_spin/config.hpp"
#include "cavity_spin/constitutive.hpp"
#include "cavity_spin/diagnostics.hpp"
#include "cavity_spin/dynamics.hpp"
#include "cavity_spin/eig3.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/grid.hpp"
#include "cavity_spin/harness.hpp"
#include "cavity_spin/initial.hpp"
#include "cavity_spin/io.hpp"
#include "cavity_spin/linalg.hpp"
#include "cavity_spin/parallel.hpp"
#include "cavity_spin/state.hpp"
#include "cavity_spin/steady.hpp"
