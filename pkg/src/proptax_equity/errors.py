"""Exception types shared across the package."""


class AssessmentError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(AssessmentError, ValueError):
    pass


class TooFewSales(ValidationError):
    def __init__(self, count, min_sales):
        super().__init__(f"panel has {count} sales, need at least {min_sales}")
        self.count = count
        self.min_sales = min_sales


class NonPositivePrice(ValidationError):
    def __init__(self, index, field="sale_price"):
        super().__init__(f"record {index}: {field} must be > 0")
        self.index = index
        self.field = field


class DateOutOfWindow(ValidationError):
    def __init__(self, index, date, window):
        super().__init__(f"record {index}: sale_date {date} outside {window[0]}-{window[1]}")
        self.index = index


class InvalidWeight(ValidationError):
    def __init__(self, index):
        super().__init__(f"record {index}: sample_weight must be finite and > 0")
        self.index = index


class MixedCounty(ValidationError):
    pass


class EmptyInput(AssessmentError, ValueError):
    pass


class DegenerateRegressor(AssessmentError, ValueError):
    pass


class LengthMismatch(AssessmentError, ValueError):
    pass


class TruthMismatch(AssessmentError, ValueError):
    pass


class SingleYearPanel(AssessmentError, ValueError):
    pass


class AllMissingColumn(AssessmentError, ValueError):
    pass


class ZeroVarianceColumn(UserWarning):
    """Emitted when a column has no spread on the fitting rows; the column is dropped."""


class NonConvergence(AssessmentError, RuntimeError):
    pass


class SchemaMismatch(AssessmentError, ValueError):
    pass


class BudgetZero(AssessmentError, ValueError):
    pass


class DegenerateStatistic(AssessmentError, ValueError):
    pass


class MissingColumn(AssessmentError, ValueError):
    pass


class DuplicateBlockGroupRow(AssessmentError, ValueError):
    pass


class ConfigError(AssessmentError, ValueError):
    pass
