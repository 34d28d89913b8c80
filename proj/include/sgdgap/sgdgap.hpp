/*
   Copyright 2026 The sgdgap Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include "sgdgap/core.hpp"
#include "sgdgap/rng.hpp"
#include "sgdgap/models.hpp"
#include "sgdgap/data.hpp"
#include "sgdgap/report.hpp"
#include "sgdgap/gradstats.hpp"
#include "sgdgap/oracle.hpp"
#include "sgdgap/theory.hpp"
#include "sgdgap/optim.hpp"
#include "sgdgap/config.hpp"
#include "sgdgap/ensemble.hpp"
#include "sgdgap/training.hpp"
