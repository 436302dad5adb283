"""Exception hierarchy shared across the kernel.

Every exception carries enough context (entity name, row, period) for the CLI
to print a one-line diagnostic and map the class to an exit code.
"""

from __future__ import annotations


class IAMError(Exception):
    """Base class for all kernel errors."""

    exit_code = 1


class InputError(IAMError):
    """Bad dataset, bad scenario file, or bad call arguments."""

    exit_code = 2


# --- dataset / model-core -------------------------------------------------


class MissingTable(InputError):
    def __init__(self, table: str, directory: str = ""):
        self.table = table
        where = f" in {directory}" if directory else ""
        super().__init__(f"missing table {table}{where}")


class SchemaViolation(InputError):
    def __init__(self, table: str, row: int | None, column: str, reason: str):
        self.table, self.row, self.column, self.reason = table, row, column, reason
        loc = f"{table}" + (f":{row}" if row is not None else "")
        super().__init__(f"{loc}: column '{column}': {reason}")


class DanglingCommodity(InputError):
    def __init__(self, technology: str, commodity: str):
        self.technology, self.commodity = technology, commodity
        super().__init__(
            f"technology '{technology}' consumes '{commodity}', which has no producer or resource"
        )


class BadSharesSum(InputError):
    def __init__(self, nest: str, total: float):
        self.nest, self.total = nest, total
        super().__init__(f"observed shares in nest '{nest}' sum to {total!r}, expected 1")


class NonPositiveIntensity(InputError):
    def __init__(self, technology: str, commodity: str, value: float):
        self.technology, self.commodity, self.value = technology, commodity, value
        super().__init__(
            f"technology '{technology}' has non-positive intensity {value!r} for '{commodity}'"
        )


class InvalidEntity(InputError):
    """Any other type-invariant violation; names the offending entity."""

    def __init__(self, entity: str, reason: str):
        self.entity, self.reason = entity, reason
        super().__init__(f"{entity}: {reason}")


# --- choice ----------------------------------------------------------------


class MissingPrice(IAMError):
    def __init__(self, commodity: str):
        self.commodity = commodity
        super().__init__(f"no price for commodity '{commodity}'")


class AllWeightsZero(IAMError):
    pass


class ZeroObservedCostWithPositiveShare(InputError):
    pass


# --- markets / policy ------------------------------------------------------


class InfeasibleConstraintSet(IAMError):
    exit_code = 4


class NoConvergence(IAMError):
    exit_code = 3

    def __init__(self, message: str, solution=None, residual: float = float("nan")):
        self.solution = solution
        self.residual = residual
        super().__init__(message)


class CapInfeasible(IAMError):
    exit_code = 4

    def __init__(self, year: int, cap: float, emissions: float):
        self.year, self.cap, self.emissions = year, cap, emissions
        self.gap = emissions - cap
        super().__init__(
            f"{year}: net emissions {emissions:.2f} Mt at the carbon-price ceiling exceed cap "
            f"{cap:.2f} Mt (gap {self.gap:.2f} Mt)"
        )


class BadYears(InputError):
    pass


class UnknownScenarioKey(InputError):
    pass


# --- emissions / feasibility -----------------------------------------------


class ZeroGeneration(IAMError):
    pass


class NoNegativeEmissions(IAMError):
    pass


class EmptySector(IAMError):
    pass


class NoBindingCap(IAMError):
    pass


class UnknownTechClass(InputError):
    pass


class MisalignedSeries(InputError):
    pass


class UnknownPotential(InputError):
    pass


# --- scenario files ----------------------------------------------------------


class UnknownKey(InputError):
    pass


class BadValue(InputError):
    pass
