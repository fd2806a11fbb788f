import math

from rest_framework import serializers
from rest_framework.renderers import JSONRenderer


class H0ConstantsSerializer(serializers.Serializer):
    c0 = serializers.FloatField()
    c1 = serializers.FloatField()


class ChainConstantsSerializer(serializers.Serializer):
    gamma0 = serializers.FloatField()
    gamma1 = serializers.FloatField()
    beta0 = serializers.FloatField()
    beta1 = serializers.FloatField()
    alpha0 = serializers.FloatField()
    alpha1 = serializers.FloatField()
    fine = H0ConstantsSerializer()
    coarse = H0ConstantsSerializer(allow_null=True)
    effective = H0ConstantsSerializer(read_only=True)
    contraction = serializers.FloatField(read_only=True)


class InversePairReportSerializer(serializers.Serializer):
    constants = H0ConstantsSerializer()
    measured = H0ConstantsSerializer()
    lower_bound = serializers.FloatField()
    upper_bound = serializers.FloatField()
    lower_slack = serializers.FloatField(read_only=True)
    upper_slack = serializers.FloatField(read_only=True)
    passed = serializers.BooleanField(read_only=True)


class BetaBoundsReportSerializer(serializers.Serializer):
    measured_beta0 = serializers.FloatField()
    measured_beta1 = serializers.FloatField()
    lower_bound = serializers.FloatField()
    upper_bound = serializers.FloatField()
    bounds = serializers.DictField(child=serializers.FloatField())
    passed = serializers.BooleanField(read_only=True)


class EstimateReportSerializer(serializers.Serializer):
    passed = serializers.BooleanField()
    factor = serializers.FloatField()
    tightest_step = serializers.IntegerField()
    tightest_ratio = serializers.SerializerMethodField()
    violations = serializers.ListField(child=serializers.IntegerField())

    def get_tightest_ratio(self, obj):
        # a collapsed bound gives an infinite ratio, which JSON cannot carry
        return obj.tightest_ratio if math.isfinite(obj.tightest_ratio) else None


class CheckSerializer(serializers.Serializer):
    name = serializers.CharField()
    passed = serializers.BooleanField()
    detail = serializers.CharField(allow_blank=True)


class VerifySummarySerializer(serializers.Serializer):
    level = serializers.IntegerField()
    passed = serializers.BooleanField(read_only=True)
    checks = CheckSerializer(many=True)
    chain = ChainConstantsSerializer(allow_null=True)


def render(serializer_class, instance):
    return JSONRenderer().render(serializer_class(instance).data)
