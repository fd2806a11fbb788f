from rest_framework import serializers
from rest_framework.renderers import JSONRenderer


class CoefficientSerializer(serializers.Serializer):
    alpha_1 = serializers.FloatField()
    alpha_2 = serializers.FloatField()
    sigma = serializers.FloatField(allow_null=True)
    single_direction_bound = serializers.FloatField()
    fallback = serializers.BooleanField()


class SolveReportSerializer(serializers.Serializer):
    """
    Read-only view of a SolveReport:
    {config, iterations, converged, rate, residual_history[], coefficient_trace[], wall_time_s}
    """
    config = serializers.DictField()
    iterations = serializers.IntegerField()
    converged = serializers.BooleanField()
    stagnated = serializers.BooleanField()
    rate = serializers.FloatField(source="convergence_rate", allow_null=True)
    residual_history = serializers.ListField(child=serializers.FloatField())
    true_residual = serializers.FloatField()
    coefficient_trace = CoefficientSerializer(many=True)
    wall_time_s = serializers.FloatField(source="wall_time")


def render_report(report):
    return JSONRenderer().render(SolveReportSerializer(report).data)
